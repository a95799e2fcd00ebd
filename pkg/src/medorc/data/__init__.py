"""Bundled default data files: lexicons and few-shot examples."""
