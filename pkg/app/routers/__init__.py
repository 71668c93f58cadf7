# Routers - command handlers
