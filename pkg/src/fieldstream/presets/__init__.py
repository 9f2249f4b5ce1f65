"""Packaged run configurations; load them with `fieldstream <cmd> --preset NAME`."""
