"""Walk through the network: backbone pyramid, FPN fusion, decoder, heads.

The desk profile is a pico variant of the full architecture; both follow the
same scale schedule (spatial side halves per level, channels double).
"""
import torch

from thforge import DualHeadNet, desk_model_config

cfg = desk_model_config()
model = DualHeadNet(cfg)
model.eval()

x = torch.randn(2, 3, cfg.input_size, cfg.input_size)

pyramid = model.backbone(x)
print("backbone levels:")
for i, level in enumerate(pyramid.levels):
    print(f"  f{i}: {tuple(level.shape)}")

fused = model.fpn(pyramid)
print(f"fpn unifies channels to {fused.channels} at sides {fused.spatial_sides}")

final, mid = model.decoder(fused)
print(f"decoder output {tuple(final.shape)}, deep-supervision state {tuple(mid.shape)}")

with torch.no_grad():
    pred = model(x)
print(f"score {tuple(pred.score.shape)} in [{pred.score.min():.3f}, {pred.score.max():.3f}]")
print(f"mask  {tuple(pred.mask.shape)} at input resolution")

# Evaluation mode is deterministic: same input, same output.
with torch.no_grad():
    again = model(x)
print("deterministic:", torch.equal(pred.score, again.score))

n = model.parameter_count()
print(f"desk parameters: {n/1e6:.2f}M (full profile is ~200M)")
