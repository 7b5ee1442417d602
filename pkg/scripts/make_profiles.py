"""Regenerate the bundled synthetic 168-hour profile file.

PV is diurnal with a midday peak that varies by day, demand has morning and
evening peaks with quieter weekends, and the grid price is cheap at night and
peaks in the evening.
"""
from pathlib import Path

import numpy as np

from h2price.scenario import Profiles, write_profiles

OUT = Path(__file__).resolve().parents[1] / "src" / "h2price" / "data" / "profiles_168h.csv"

PV_PEAK_KWH = np.array([690.0, 720.0, 450.0, 610.0, 700.0, 520.0, 660.0])
WEEKEND = {5, 6}


def build() -> Profiles:
    hours = np.arange(168)
    day, hod = hours // 24, hours % 24

    sun = np.clip(np.sin(np.pi * (hod - 6.0) / 14.0), 0.0, None)
    sun[(hod < 6) | (hod > 20)] = 0.0
    mu_pv = np.round(PV_PEAK_KWH[day] * sun**1.5, 2)

    morning = 16.0 * np.exp(-0.5 * ((hod - 8.0) / 1.4) ** 2)
    evening = 19.0 * np.exp(-0.5 * ((hod - 18.5) / 1.6) ** 2)
    daytime = 5.0 * ((hod >= 9) & (hod <= 17))
    weekend = np.array([0.65 if d in WEEKEND else 1.0 for d in day])
    mu_d = np.round(weekend * (2.0 + daytime + morning + evening), 3)

    price = np.select(
        [hod < 6, hod < 10, hod < 17, hod < 22],
        [0.05, 0.12, 0.11, 0.20],
        default=0.08,
    )
    price = np.where(np.isin(day, list(WEEKEND)), 0.85 * price, price)
    return Profiles(mu_pv=mu_pv, mu_d=mu_d, c_grid=np.round(price, 4))


if __name__ == "__main__":
    prof = build()
    write_profiles(prof, OUT)
    print(f"wrote {OUT}: mean demand {prof.mu_d.mean():.2f} kg/h, "
          f"peak demand {prof.mu_d.max():.1f}, PV total {prof.mu_pv.sum():.0f} kWh")
