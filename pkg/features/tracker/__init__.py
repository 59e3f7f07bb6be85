"""Prediction head, crops and the frame-by-frame tracking state machine."""
