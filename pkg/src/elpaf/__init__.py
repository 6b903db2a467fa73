"""Event-driven one-step autofocus simulation and detection."""
