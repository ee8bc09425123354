# Checkpoint tracking package