"""Write the same random 7x5 RGB image as 24-bit BMP and binary PPM with
Pillow, plus its raw pixel bytes.

usage: make_image_pair.py OUT_DIR
"""
import os
import random
import sys

from PIL import Image

out = sys.argv[1]
rng = random.Random(20240917)
w, h = 7, 5
pixels = [tuple(rng.randrange(256) for _ in range(3)) for _ in range(w * h)]
img = Image.new("RGB", (w, h))
img.putdata(pixels)
img.save(os.path.join(out, "pair.bmp"), format="BMP")
img.save(os.path.join(out, "pair.ppm"), format="PPM")
with open(os.path.join(out, "pair.rgb"), "wb") as f:
    f.write(bytes(c for p in pixels for c in p))
