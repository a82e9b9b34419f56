"""Regenerate the built-in gripper descriptions in src/graspfield/grippers/.

Frame convention: the palm lies in the wrist xy-plane and the approach
direction is +z. Fingers sit on a ring around the palm; each finger frame has
x pointing radially outward, so flexion about -y curls the finger inward.
"""
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "graspfield" / "grippers"
FLEX = [0.0, -1.0, 0.0]


def zquat(phi):
    return [float(np.cos(phi / 2)), 0.0, 0.0, float(np.sin(phi / 2))]


def off(t=(0, 0, 0), q=(1, 0, 0, 0)):
    return {"t": [float(v) for v in t], "q": [float(v) for v in q]}


def palm_contacts(n_side, half):
    pts = np.linspace(-half, half, n_side) if n_side > 1 else [0.0]
    return [{"link": "palm", "offset": [float(x), float(y), 0.0]} for x in pts for y in pts]


def simple9():
    links = [{"name": "palm", "parent": None, "offset": off()}]
    joints, contacts = [], []
    contacts += [{"link": "palm", "offset": [0.0, 0.0, 0.0]},
                 {"link": "palm", "offset": [0.015, 0.0, 0.0]},
                 {"link": "palm", "offset": [-0.015, 0.0, 0.0]}]
    lengths = [0.035, 0.03, 0.025]
    for f, phi in enumerate(np.deg2rad([0.0, 120.0, 240.0])):
        base = [0.035 * np.cos(phi), 0.035 * np.sin(phi), 0.005]
        parent = "palm"
        for k in range(3):
            name = f"f{f}_l{k}"
            t = base if k == 0 else (0.0, 0.0, lengths[k - 1])
            q = zquat(phi) if k == 0 else (1, 0, 0, 0)
            links.append({"name": name, "parent": parent, "offset": off(t, q)})
            lim = [-0.4, 1.2] if k == 0 else [0.0, 1.6]
            joints.append({"link": name, "axis": FLEX, "limits": lim})
            z = lengths[k] if k == 2 else 0.5 * lengths[k]
            contacts.append({"link": name, "offset": [-0.006, 0.0, z]})
            parent = name
    return {
        "description": "3 fingers x 3 flexion joints on a 120-degree ring; one pad contact "
                       "per phalanx (tip contact at the distal end) plus 3 palm contacts.",
        "links": links, "joints": joints, "contacts": contacts,
    }


def wide24():
    links = [{"name": "palm", "parent": None, "offset": off()}]
    joints, contacts = [], []
    contacts += palm_contacts(3, 0.02)
    # per finger: twist, knuckle flexion, abduction, then three phalanx flexions
    spec = [
        ("twist", [0.0, 0.0, 1.0], [-0.5, 0.5], 0.0),
        ("knuckle", FLEX, [-0.3, 1.2], 0.0),
        ("abduct", [1.0, 0.0, 0.0], [-0.4, 0.4], 0.0),
        ("prox", FLEX, [0.0, 1.6], 0.03),
        ("mid", FLEX, [0.0, 1.6], 0.025),
        ("dist", FLEX, [0.0, 1.6], 0.02),
    ]
    # contact pads along the inner side of each segment, z in the link frame
    pads = {"abduct": [0.01, 0.02], "prox": [0.008, 0.016, 0.024], "mid": [0.007, 0.014], "dist": [0.006, 0.016]}
    for f, phi in enumerate(np.deg2rad([0.0, 90.0, 180.0, 270.0])):
        parent = "palm"
        for k, (tag, axis, lim, along) in enumerate(spec):
            name = f"f{f}_{tag}"
            if k == 0:
                t, q = [0.04 * np.cos(phi), 0.04 * np.sin(phi), 0.005], zquat(phi)
            else:
                t, q = (0.0, 0.0, spec[k - 1][3]), (1, 0, 0, 0)
            links.append({"name": name, "parent": parent, "offset": off(t, q)})
            joints.append({"link": name, "axis": axis, "limits": lim})
            for z in pads.get(tag, []):
                contacts.append({"link": name, "offset": [-0.006, 0.0, z]})
            parent = name
    return {
        "description": "4 fingers x 6 joints (twist, knuckle flexion, abduction, 3 phalanx "
                       "flexions) on a 90-degree ring; 9 pad contacts per finger spread "
                       "uniformly along the inner side of the phalanges plus a 3x3 palm grid.",
        "links": links, "joints": joints, "contacts": contacts,
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in [("simple9", simple9), ("wide24", wide24)]:
        (OUT / f"{name}.json").write_text(json.dumps(fn(), indent=1) + "\n")
