# %% [markdown]
# # Checking each Gibbs block against the joint density
#
# For any block θ, the conditional it draws from must satisfy
#
#     log q(θ'|rest) − log q(θ|rest) = log p(θ', rest) − log p(θ, rest)
#
# where p is the joint posterior density. This script evaluates both sides
# for every block on a small random problem.

# %%
import numpy as np
from scipy import stats

from lmmselect import ChainState, DesignConfig, HyperParams, build_designs, joint_log_density
from lmmselect.data import make_dataset
from lmmselect.sampler import (
    alpha_conditional,
    b_conditional,
    beta_conditional,
    lambda_conditional,
    sigma2_conditional,
)

rng = np.random.default_rng(4)
records = []
for k, group in enumerate(["treated", "treated", "control", "control"]):
    t = np.sort(rng.uniform(0, 2, 5))
    records.append((f"s{k}", group, t, 3 - t + rng.normal(0, 0.5, 5)))
designs = build_designs(make_dataset(records, control="control"), DesignConfig(time_offset=0, time_scale=1))
hp = HyperParams(d1=1.0, d2=1.0, d3=np.zeros(2), d4=0.5, pi=np.array([0.5, 0.0]))
state = ChainState(
    gamma=np.array([[1], [0]], dtype=np.int8),
    beta=[np.array([0.3]), np.zeros(0)],
    alpha=np.array([2.5, -0.8]),
    sigma2=0.4,
    b=rng.normal(0, 0.3, (4, 2)),
    lambda_D=2.0,
)


def joint(**changes):
    s = state.copy()
    for k, v in changes.items():
        setattr(s, k, v)
    return joint_log_density(s, designs, hp)


def mvn(x, mean, prec):
    return stats.multivariate_normal.logpdf(x, mean, np.linalg.inv(prec))


# %%
rows = []
m, P, _ = beta_conditional(0, state, designs)
t0, t1 = np.array([-1.0]), np.array([1.2])
rows.append(("beta", mvn(t1, m, P) - mvn(t0, m, P), joint(beta=[t1, np.zeros(0)]) - joint(beta=[t0, np.zeros(0)])))

m, P, _ = alpha_conditional(state, designs, hp)
t0, t1 = np.array([1.0, 0.0]), np.array([3.0, -1.5])
rows.append(("alpha", mvn(t1, m, P) - mvn(t0, m, P), joint(alpha=t1) - joint(alpha=t0)))

a, r = sigma2_conditional(state, designs)
q = stats.invgamma(a, scale=r)
rows.append(("sigma2", q.logpdf(0.9) - q.logpdf(0.2), joint(sigma2=0.9) - joint(sigma2=0.2)))

m, P, _ = b_conditional(0, state, designs)
b0, b1 = state.b.copy(), state.b.copy()
b1[0] = [0.5, -0.5]
rows.append(("b_0", mvn(b1[0], m, P) - mvn(b0[0], m, P), joint(b=b1) - joint(b=b0)))

a, r = lambda_conditional(state, hp)
q = stats.gamma(a, scale=1 / r)
rows.append(("lambda_D", q.logpdf(4.0) - q.logpdf(0.5), joint(lambda_D=4.0) - joint(lambda_D=0.5)))

print(f"{'block':<10}{'conditional':>16}{'joint':>16}{'difference':>14}")
for name, lhs, rhs in rows:
    print(f"{name:<10}{lhs:16.10f}{rhs:16.10f}{lhs - rhs:14.2e}")
