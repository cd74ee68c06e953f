"""Native host function tables for linking against Owlang modules."""
