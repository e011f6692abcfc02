"""Building blocks: pyramid encoder, motion encoder, ConvGRU, flow head."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1, stride=stride)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(out_ch)
        self.norm2 = nn.InstanceNorm2d(out_ch)
        if stride == 1 and in_ch == out_ch:
            self.down = None
        else:
            self.down = nn.Conv2d(in_ch, out_ch, 1, stride=stride)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = F.relu(self.norm2(self.conv2(y)))
        return (x if self.down is None else self.down(x)) + y


class PyramidEncoder(nn.Module):
    """Three-scale feature pyramid: taps at 1/2, 1/4, 1/8.

    Input images are (B, 3, H, W) in [0, 1] with H, W divisible by 8.
    """

    def __init__(self, widths):
        super().__init__()
        d8, d4, d2 = widths  # coarse to fine
        base = max(d2, 32)
        self.stem = nn.Conv2d(3, base, 7, stride=2, padding=3)
        self.norm = nn.InstanceNorm2d(base)
        self.layer2 = ResidualBlock(base, base)
        self.layer4 = ResidualBlock(base, d4, stride=2)
        self.layer8 = ResidualBlock(d4, d8, stride=2)
        self.tap2 = nn.Conv2d(base, d2, 1)
        self.tap4 = nn.Conv2d(d4, d4, 1)
        self.tap8 = nn.Conv2d(d8, d8, 1)

    def forward(self, image: torch.Tensor) -> dict:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ValueError(f"image must be (B, 3, H, W), got {tuple(image.shape)}")
        if image.shape[2] % 8 or image.shape[3] % 8:
            raise ValueError(
                f"H, W must be divisible by 8, got {image.shape[2]}x{image.shape[3]}"
            )
        x = image * 2.0 - 1.0
        x2 = self.layer2(F.relu(self.norm(self.stem(x))))
        x4 = self.layer4(x2)
        x8 = self.layer8(x4)
        return {2: self.tap2(x2), 4: self.tap4(x4), 8: self.tap8(x8)}


class ContextEncoder(nn.Module):
    """Reference-image context: per-scale (hidden-init, context) taps.

    Only the 1/8 hidden tap initializes the recurrent state; the finer
    scales inherit their hidden state through upsampling and consume just
    the context features.
    """

    def __init__(self, hidden_dim: int, context_dim: int):
        super().__init__()
        base = 48
        self.stem = nn.Conv2d(3, base, 7, stride=2, padding=3)
        self.norm = nn.InstanceNorm2d(base)
        self.layer2 = ResidualBlock(base, base)
        self.layer4 = ResidualBlock(base, 64, stride=2)
        self.layer8 = ResidualBlock(64, 96, stride=2)
        self.tap8 = nn.Conv2d(96, hidden_dim + context_dim, 1)
        self.tap4 = nn.Conv2d(64, context_dim, 1)
        self.tap2 = nn.Conv2d(base, context_dim, 1)
        self.hidden_dim = hidden_dim

    def forward(self, image: torch.Tensor):
        x = image * 2.0 - 1.0
        x2 = self.layer2(F.relu(self.norm(self.stem(x))))
        x4 = self.layer4(x2)
        x8 = self.layer8(x4)
        both = self.tap8(x8)
        hidden0 = torch.tanh(both[:, : self.hidden_dim])
        contexts = {
            8: torch.relu(both[:, self.hidden_dim:]),
            4: torch.relu(self.tap4(x4)),
            2: torch.relu(self.tap2(x2)),
        }
        return hidden0, contexts


class MotionEncoder(nn.Module):
    """Compress correlation features + current flow into motion features."""

    out_dim = 64

    def __init__(self, corr_channels: int):
        super().__init__()
        self.conv_c1 = nn.Conv2d(corr_channels, 64, 1)
        self.conv_c2 = nn.Conv2d(64, 48, 3, padding=1)
        self.conv_f1 = nn.Conv2d(2, 32, 7, padding=3)
        self.conv_f2 = nn.Conv2d(32, 16, 3, padding=1)
        self.conv_out = nn.Conv2d(48 + 16, self.out_dim - 2, 3, padding=1)

    def forward(self, corr_feat: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
        c = F.relu(self.conv_c2(F.relu(self.conv_c1(corr_feat))))
        f = F.relu(self.conv_f2(F.relu(self.conv_f1(flow))))
        m = F.relu(self.conv_out(torch.cat((c, f), dim=1)))
        return torch.cat((m, flow), dim=1)


class ConvGRU(nn.Module):
    """Convolutional gated recurrent unit: h' = (1 - z) * h + z * q."""

    def __init__(self, hidden_dim: int, input_dim: int):
        super().__init__()
        both = hidden_dim + input_dim
        self.conv_z = nn.Conv2d(both, hidden_dim, 3, padding=1)
        self.conv_r = nn.Conv2d(both, hidden_dim, 3, padding=1)
        self.conv_q = nn.Conv2d(both, hidden_dim, 3, padding=1)

    def forward(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        hx = torch.cat((h, x), dim=1)
        z = torch.sigmoid(self.conv_z(hx))
        r = torch.sigmoid(self.conv_r(hx))
        q = torch.tanh(self.conv_q(torch.cat((r * h, x), dim=1)))
        return (1 - z) * h + z * q

    def gates(self, h: torch.Tensor, x: torch.Tensor):
        hx = torch.cat((h, x), dim=1)
        return torch.sigmoid(self.conv_z(hx)), torch.sigmoid(self.conv_r(hx))


class FlowHead(nn.Module):
    """Two-layer decoder from hidden state to a flow residual."""

    def __init__(self, hidden_dim: int, mid: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(hidden_dim, mid, 3, padding=1)
        self.conv2 = nn.Conv2d(mid, 2, 3, padding=1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.relu(self.conv1(h)))
