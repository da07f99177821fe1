# MD-PSM / PSM link-level simulation package
