# SATIR src module
