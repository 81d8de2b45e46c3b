# Domain records, scenario schema and the run ledger
