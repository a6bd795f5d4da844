"""Hard triplets and uncertainty-weighted blending on toy geometry.

Six unit vectors on the plane, two classes.  The miner picks, for each
anchor, the farthest same-label sample (hard positive) and the nearest
different-label sample (hard negative) by cosine distance.  The mixup
then blends each embedding with its partners, weighted by the per-sample
sigma, so uncertain samples lean harder on their partners.
"""

import numpy as np

import uqtrain.tensor as T
from uqtrain.heads import UncertainBatch
from uqtrain.losses import mixup
from uqtrain.mining import mine_triplets, pairwise_cosine_distances


def unit(deg):
    rad = np.deg2rad(deg)
    return [np.cos(rad), np.sin(rad)]


def main():
    angles = [0, 10, 50, 90, 130, 180]
    labels = np.array([0, 0, 0, 1, 1, 1])
    mu = np.array([unit(a) for a in angles])

    print("sample  angle  label")
    for i, (a, l) in enumerate(zip(angles, labels)):
        print(f"   {i}    {a:>4}      {l}")

    dist = pairwise_cosine_distances(mu)
    print("\ncosine distances, rounded:")
    print(np.round(dist, 3))

    sigma = np.full((6, 2), 0.5)
    sigma[1] = 2.0          # sample 1 is very unsure of itself
    u = UncertainBatch(mean=T.constant(mu), sigma=T.constant(sigma),
                       labels=labels)
    plan = mine_triplets(u, 1.0, seed=0, epoch=0, batch_index=0)

    print("\nanchor -> hard positive, hard negative:")
    for i in range(6):
        print(f"   {i} ({angles[i]:>3} deg) -> pos {plan.pos_index[i]} "
              f"({angles[plan.pos_index[i]]:>3} deg), "
              f"neg {plan.neg_index[i]} "
              f"({angles[plan.neg_index[i]]:>3} deg)")

    mixed = mixup(u, plan)
    w = np.stack([mixed.w_self.values[:, 0], mixed.w_pos.values[:, 0],
                  mixed.w_neg.values[:, 0]], axis=1)
    print("\nblend weights (self, positive, negative), first channel:")
    print(np.round(w, 3))
    print(f"rows sum to one: "
          f"{np.allclose(w.sum(axis=1), 1.0)}")
    print("each branch's weight is proportional to its own sigma, so "
          "sample 1 (sigma 2.0 against 0.5 partners) keeps 2/3 of "
          "itself; everyone else splits evenly three ways.")


if __name__ == "__main__":
    main()
