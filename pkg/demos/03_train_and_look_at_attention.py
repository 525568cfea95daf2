# coding: utf-8

# # Training a parser and looking where its queries attend
#
# The acceptance settings: default data and model sizes with a faster backbone
# rate, margin 2 and a light sparsity weight. About two minutes on one core.

# In[1]:

import logging

import numpy as np

from tpt_aqa.data import generate_dataset
from tpt_aqa.harness import RunConfig, evaluate, export_attention, train
from tpt_aqa.losses import attention_center

logging.basicConfig(level=logging.INFO, format="%(message)s")


# In[2]:

config = RunConfig()
config.apply_overrides([
    "lr_backbone = 1e-3",
    "weights.sparsity = 0.1",
    "weights.margin = 2.0",
    "epochs = 40",
])
data = generate_dataset(config.generator)
run = train(config, data)
report = evaluate(run.model, data["test"], data["train"], config)
print("test spearman %.4f, relative L2 x100 %.3f" % (report.spearman, report.relative_l2_x100))


# How much of each query's attention lands in each true phase, averaged over
# test videos. A clean parse is close to the identity matrix.

# In[3]:

test = data["test"]
attention = run.model.decode(np.stack([v.clips for v in test])).attention[-1].data
mass = np.zeros((attention.shape[1], config.generator.K_true))
for a, v in zip(attention, test):
    b = v.phase_boundaries
    for j in range(len(b) - 1):
        mass[:, j] += a[:, b[j] - 1:b[j + 1] - 1].sum(-1)
print(np.round(mass / len(test), 2))


# In[4]:

centers = attention_center(attention).data
print("ordered centers on %.1f%% of test videos" % (100 * np.mean(np.all(np.diff(centers, axis=1) > 0, axis=1))))
print("first video centers", np.round(centers[0], 2), "phase starts", test[0].phase_boundaries)


# Dump the maps as CSV and grayscale PGM images.

# In[5]:

stems = export_attention(run.model, test[:2], "attention_maps")
print("\n".join(stems))
