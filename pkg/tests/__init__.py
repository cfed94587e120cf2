"""Tests for the Aeolus odometry package."""
