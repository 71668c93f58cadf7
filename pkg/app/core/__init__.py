# Core module - configuration, logging, exceptions, command routing
