"""Interactive spoken-content retrieval with jointly trained dialogue agents.

A language-model retrieval engine, a four-action dialogue manager, and a
four-decision-maker user simulator, trained against each other with
from-scratch deep Q-networks (vanilla, double, and dueling), plus the
rule-based baseline simulator, evaluation metrics, and a session service
for live human-in-the-loop dialogues.
"""

__version__ = "0.1.0"
