# Data models, file formats, configuration and synthetic scenes