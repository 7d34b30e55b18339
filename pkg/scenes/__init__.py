# nett.scenes
