# coding: utf-8

# # Synthetic videos, score intervals and metrics
#
# Each video is a sequence of T clip vectors cut into K_true contiguous phases.
# A phase's clips sit at a phase embedding, shifted along a quality direction by
# that phase's hidden quality. The score is a weighted sum of the qualities.

# In[1]:

import numpy as np

from tpt_aqa.data import GeneratorConfig, generate_dataset, pair_deltas
from tpt_aqa.metrics import relative_l2, spearman
from tpt_aqa.regressor import build_intervals, decode_score, encode_target


# In[2]:

config = GeneratorConfig(num_videos={"train": 60, "val": 10, "test": 20})
data = generate_dataset(config)
v = data["train"][0]
print("clips", v.clips.shape, "score %.2f" % v.score)
print("phase starts (1-based, last is T+1):", v.phase_boundaries)


# Contrastive regression predicts the score gap to an exemplar. The gaps of all
# ordered training pairs are split into B intervals holding equal numbers of pairs.

# In[3]:

scores = [x.score for x in data["train"]]
intervals = build_intervals(scores, 4)
print("edges", np.round(intervals.edges, 2))
print("pairs per interval", intervals.counts)
print("deltas", len(pair_deltas(data["train"])))


# A gap is encoded as a one-hot interval plus its position inside the interval,
# and decoding the target gives the gap back exactly.

# In[4]:

t = encode_target(7.5, intervals)
print("interval", t.index, "gamma %.3f" % t.gamma)
print("decoded score from exemplar 40:", decode_score(t.labels, np.full(4, t.gamma), intervals, 40.0))


# Evaluation uses Spearman correlation and the range-normalised squared error.

# In[5]:

truth = np.array([x.score for x in data["test"]])
noisy = truth + np.random.default_rng(1).normal(0, 5, len(truth))
print("spearman %.4f" % spearman(noisy, truth))
print("relative L2 x100 %.4f" % (100 * relative_l2(noisy, truth, *config.declared_range())))
