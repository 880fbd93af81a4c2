from gridmeter.loadgen.cli import main

raise SystemExit(main())
