from delaydensity.main import main

raise SystemExit(main())
