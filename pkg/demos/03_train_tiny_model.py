# Training a small conditional score network with denoising score matching.
#
# The network here is deliberately tiny so the script finishes in about a
# minute; the benchmark uses the default architecture and 20k steps.
#
# Run:  python3 demos/03_train_tiny_model.py

import numpy as np

from scoreseg import Architecture, ScoreModel, TrainConfig, generate_synthetic, make_rng, train

data = generate_synthetic(64, 16, None, make_rng(0))
arch = Architecture(c1=8, c2=16, n_freq=8, emb_hidden=16)
model = ScoreModel.init(arch, make_rng(1))
print(f"{arch.n_params} parameters")

# The output layer starts at zero, so the first losses sit near 1: the
# weighted residual sigma * s + z is then just the injected noise z.
cfg = TrainConfig(total_steps=400, batch_size=8, seed=2, learning_rate=1e-3)
res = train(data, cfg, model)

losses = np.array(res.losses)
for start in range(0, len(losses), 50):
    print(f"steps {start + 1:4d}-{start + 50:4d}  mean loss {losses[start:start + 50].mean():.3f}")
