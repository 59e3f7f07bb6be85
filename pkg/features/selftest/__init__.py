"""Built-in gradient, identity, memory and metric checks behind the ``selftest`` command."""
