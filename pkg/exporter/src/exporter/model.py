"""Small convolutional classifier with probe points."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class SmallConvNet(nn.Module):
    """Four conv stages with ReLU, GAP head. Probe layers are the four stages."""

    NUM_PROBES = 4

    def __init__(self, in_channels, num_classes=2):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, 32, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(32, 64, 3, stride=2, padding=1)
        self.head = nn.Linear(64, num_classes)

    def stages(self, x):
        a1 = F.relu(self.conv1(x))
        a2 = F.relu(self.conv2(a1))
        a3 = F.relu(self.conv3(a2))
        a4 = F.relu(self.conv4(a3))
        return a1, a2, a3, a4

    def forward(self, x):
        a4 = self.stages(x)[-1]
        return self.head(a4.mean(dim=(2, 3)))

    @torch.no_grad()
    def probe_features(self, x, batch=128):
        """Per-stage GAP features: list of (N, C_stage) float32 tensors."""
        outs = [[] for _ in range(self.NUM_PROBES)]
        for start in range(0, x.shape[0], batch):
            stages = self.stages(x[start : start + batch])
            for k, a in enumerate(stages):
                outs[k].append(a.mean(dim=(2, 3)))
        return [torch.cat(chunks) for chunks in outs]

    def target_maps(self, x, class_index=1, batch=64):
        """Final-stage activations and d(logit_class)/d(activation) maps."""
        acts, grads = [], []
        for start in range(0, x.shape[0], batch):
            xb = x[start : start + batch]
            a1 = F.relu(self.conv1(xb))
            a2 = F.relu(self.conv2(a1))
            a3 = F.relu(self.conv3(a2))
            a4 = F.relu(self.conv4(a3))
            a4.retain_grad()
            logits = self.head(a4.mean(dim=(2, 3)))
            score = logits[:, class_index].sum()  # rows independent: per-sample grads
            g = torch.autograd.grad(score, a4)[0]
            acts.append(a4.detach())
            grads.append(g.detach())
        return torch.cat(acts), torch.cat(grads)

    def input_grad_norms(self, x, y, batch=128):
        """Per-sample L2 norm of d(cross entropy)/d(input)."""
        norms = []
        for start in range(0, x.shape[0], batch):
            xb = x[start : start + batch].clone().requires_grad_(True)
            loss = F.cross_entropy(self.forward(xb), y[start : start + batch], reduction="sum")
            g = torch.autograd.grad(loss, xb)[0]
            norms.append(g.flatten(1).norm(dim=1))
        return torch.cat(norms)

    def flat_weights(self):
        return torch.cat([p.detach().flatten() for p in self.parameters()])
