# %% [markdown]
# Difficulty from pixel masking
#
# A sample is probed at increasing masking ratios. The failure threshold is
# the first ratio where accuracy over K masks drops below tau.

# %%
import numpy as np

from planbench.difficulty import (
    ImageBuffer,
    StochasticPredictor,
    ThresholdPredictor,
    difficulty_bucket,
    mask_image,
    masking_profile,
)

rng = np.random.default_rng(0)
img = ImageBuffer(rng.integers(1, 256, (32, 32, 3), dtype=np.uint8))

# %% How much of the image goes black at each ratio
for lam in (0.0, 0.3, 0.6, 0.9):
    masked = mask_image(img, lam, seed=1).pixels
    print(lam, int(np.all(masked == 0, axis=-1).sum()), "of", img.n_pixels)

# %% A predictor that gives up once 40% of pixels are gone
prof = masking_profile(ThresholdPredictor(0.4, "cat"), img, "What animal?", "cat")
print(prof.accuracies, prof.lambda_star, difficulty_bucket(prof.lambda_star).value)

# %% A noisy predictor; more repeats per ratio steady the curve
for k in (1, 10):
    prof = masking_profile(StochasticPredictor("cat"), img, "What animal?", "cat", k=k, seed=3)
    print(k, np.round(prof.accuracies, 2), prof.lambda_star)
