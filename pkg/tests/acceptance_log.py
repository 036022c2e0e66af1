"""Shared record of acceptance outcomes, printed by the terminal-summary hook."""

# criterion number -> (passed, detail)
RESULTS: dict[int, tuple[bool, str]] = {}
