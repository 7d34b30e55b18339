# nett.storage
