# nett.network
