# nett.harness
