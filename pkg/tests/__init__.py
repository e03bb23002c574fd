"""Test suite for the Ingredient Safety Analyzer."""
