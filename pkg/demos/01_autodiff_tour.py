# coding: utf-8

# # A small tour of the autodiff engine
#
# Tensors only record operations inside a `Tape` block, and only when an input
# asks for a gradient. Parameters always do.

# In[1]:

import numpy as np

from tpt_aqa import autodiff as ad
from tpt_aqa.autodiff import Parameter, Tape


# A softmax attention over five "clips", read out through a fixed weight vector.

# In[2]:

rng = np.random.default_rng(0)
logits = Parameter("logits", rng.standard_normal(5))
w = np.array([1.0, -2.0, 0.5, 3.0, 0.0])

with Tape() as tape:
    loss = (ad.softmax(logits) * w).sum()
    tape.backward(loss)

print("loss", loss.item())
print("grad", logits.grad)


# The same gradient by central differences. The engine compares gradients with a
# norm-wise relative error.

# In[3]:

numeric = ad.numerical_gradient(lambda: float((ad.softmax(logits) * w).sum().item()), logits.data, 1e-6)
print("numeric", numeric)
print("relative error %.2e" % ad.relative_error(logits.grad, numeric))


# Batched matmul broadcasts like numpy and reports both shapes when they do not line up.

# In[4]:

try:
    ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
except ValueError as exc:
    print(type(exc).__name__, exc)


# A few Adam steps on a quadratic bowl.

# In[5]:

x = Parameter("x", np.array([3.0, -2.0]))
opt = ad.Adam([([x], 0.1)])
for step in range(200):
    opt.zero_grad()
    with Tape() as tape:
        tape.backward((x * x).sum())
    opt.step()
print("after 200 steps", x.data)
