"""Downstream behavior classification from lifted poses."""
