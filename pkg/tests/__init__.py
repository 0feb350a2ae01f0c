# VTD pipeline tests
