"""Expert-in-the-loop chat assistant.

Instant retrieval-grounded answers over a curated knowledge base, with
every medical or logistical answer routed through asynchronous human
expert verification (escalation, reminders, corrections) and a nightly
review loop that grows the expert-FAQ tier of the knowledge base.
"""

__version__ = "0.1.0"
