// temporary stub, filled in later
