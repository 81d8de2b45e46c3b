# API package for the PME lab service
