# Long-running experiment scripts
