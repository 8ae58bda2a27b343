"""Print the calibrated communication radius for a range of network sizes."""
import sys

from hybridloc.gen import GenConfig, calibrate_comm_radius

sizes = [int(a) for a in sys.argv[1:]] or [5, 10, 20, 50, 100]
for n in sizes:
    print(f"n={n:4d}  comm_radius={calibrate_comm_radius(GenConfig(n=n)):.1f} m")
