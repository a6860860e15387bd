"""Personalized search ranking from click-session context."""
