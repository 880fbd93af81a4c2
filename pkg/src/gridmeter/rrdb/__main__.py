from gridmeter.rrdb.collector import main

raise SystemExit(main())
