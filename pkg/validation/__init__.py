# nett.validation
