"""Anomaly detection for O-RAN per-UE KPI reports."""
