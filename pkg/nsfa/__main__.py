from nsfa.cli import main

raise SystemExit(main())
