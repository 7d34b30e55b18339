# nett.core
