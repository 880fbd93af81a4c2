from gridmeter.procmon.cli import main

raise SystemExit(main())
