"""Shared time conventions.

All times are integer minutes since therapy/simulation start (day 0, 00:00).
The controller works on a daily grid; the CGM simulator on a 5-minute grid.
"""

MINUTES_PER_DAY = 1440
CGM_STEP_MIN = 5
CGM_SAMPLES_PER_DAY = MINUTES_PER_DAY // CGM_STEP_MIN  # 288

# Daily clock times (minutes after midnight). Fasting SMBG is taken
# pre-breakfast; the basal injection follows the measurement.
FASTING_MINUTE = 7 * 60          # 07:00
DOSE_MINUTE = 8 * 60             # 08:00

# Meal schedule: three main meals and one afternoon snack.
MEAL_MINUTES = (450, 750, 1110)  # 07:30, 12:30, 18:30
SNACK_MINUTE = 930               # 15:30

# Dropping dose contributions older than this changes the plasma level by
# < 1e-6 of the dose's initial contribution for all shipped drugs
# (exp(-k1 * 20160) <= exp(-0.00057 * 20160) ~ 1e-5 for the slowest k1).
PK_TRUNCATION_MIN = 14 * MINUTES_PER_DAY


def fasting_time(day: int) -> int:
    """Minute of the fasting sample on a given day."""
    return day * MINUTES_PER_DAY + FASTING_MINUTE


def dose_time(day: int) -> int:
    """Minute of the basal injection on a given day."""
    return day * MINUTES_PER_DAY + DOSE_MINUTE
