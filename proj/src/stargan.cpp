namespace tabfair {}
