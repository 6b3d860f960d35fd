"""
Picking positive patches
========================

The feature-matching loss splits each encoder feature map into a grid of
patches.  For every anchor patch it keeps the most similar of its eight
neighbours and averages their projections.  Here a hand-built feature map
makes the choice easy to follow.
"""

import torch

from hfdenoise.fam import EncoderConfig, EncoderPair, fam_loss, select_positive_set, split_patches

# A 4x4 grid of 1x1 patches with two channels; the left half points one way
f = torch.zeros(2, 4, 4)
f[0, :, :2] = 1.0
f[1, :, 2:] = 1.0
f[:, 1, 1] = torch.tensor([1.0, 0.2])

patches = split_patches(f, grid=4)
anchor = 5  # row 1, column 1
chosen = select_positive_set(patches, anchor, top_k=4)
print("anchor", (patches[anchor].row, patches[anchor].col), "positives",
      [(patches[j].row, patches[j].col) for j in chosen])

# Corner anchors only have three neighbours to choose from
print("corner anchor positives:", select_positive_set(patches, 0, top_k=8))

# A freshly built encoder pair agrees with itself, so the loss starts at zero
torch.manual_seed(0)
pair = EncoderPair(EncoderConfig())
hf = torch.randn(1, 3, 32, 32)
print("loss at construction:", float(fam_loss(pair, hf, hf).detach()))
print("loss on unrelated inputs:", float(fam_loss(pair, hf, torch.randn(1, 3, 32, 32)).detach()))

# The target encoder trails the online one by exponential averaging
with torch.no_grad():
    pair.online.stages[0].weight.add_(1.0)


def gap():
    return float((pair.online.stages[0].weight - pair.target.stages[0].weight).detach().norm())


print("gap before EMA:", round(gap(), 4))
for _ in range(100):
    pair.ema_update()
print("gap after 100 updates:", round(gap(), 4), "(0.99**100 =", round(0.99 ** 100, 4), "of the start)")
