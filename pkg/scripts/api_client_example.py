"""Minimal API client: score one image and save every returned PNG.

Usage: python scripts/api_client_example.py [image] [server]
"""

import base64
import json
import os
import sys
from io import BytesIO

import requests
from PIL import Image

images_dir = os.path.dirname(sys.argv[1]) or "." if len(sys.argv) > 1 else "."
filename = os.path.basename(sys.argv[1]) if len(sys.argv) > 1 else "ROI_1.png"
server = sys.argv[2] if len(sys.argv) > 2 else os.environ.get("PQ_SERVER",
                                                              "http://localhost:8000")

res = requests.post(
    url=f"{server}/api/infer",
    files={
        "img": open(f"{images_dir}/{filename}", "rb")
    },
    # optional param that can be 10x, 20x (default), or 40x
    params={
        "resolution": "20x"
    },
)

data = res.json()


def b64_to_pil(b):
    return Image.open(BytesIO(base64.b64decode(b.encode())))


for name, img in data["images"].items():
    output_filepath = f"{images_dir}/{os.path.splitext(filename)[0]}_{name}.png"
    with open(output_filepath, "wb") as f:
        b64_to_pil(img).save(f, format="PNG")

print(json.dumps(data["scoring"], indent=2))
