"""Thin-plate-spline rectification.

A small localization network predicts K fiducial points in the input
image; solving the TPS system against a fixed horizontal lattice of base
fiducials yields a sampling grid that straightens tilted text lines. All
pieces are differentiable so the warp trains end-to-end.

Fiducial points, grids and images use normalized coordinates in [-1, 1]
with the align-corners convention (-1 and +1 sit on the outermost pixel
centers). Images are channel-last (H x W x C, batched B x H x W x C).
"""

from __future__ import annotations

import torch
import torch.nn as nn

COINCIDENT_TOL = 1e-8
_LOG_EPS = 1e-12


def base_fiducials(K, dtype=torch.float32):
    """K/2 points along the top edge (y=-1) and K/2 along the bottom (y=+1)."""
    if K < 6 or K % 2 != 0:
        raise ValueError("K must be an even integer >= 6")
    xs = torch.linspace(-1.0, 1.0, K // 2, dtype=dtype)
    top = torch.stack([xs, torch.full_like(xs, -1.0)], dim=1)
    bottom = torch.stack([xs, torch.full_like(xs, 1.0)], dim=1)
    return torch.cat([top, bottom], dim=0)


def _kernel(r2):
    # U(r) = r^2 log r^2 with U(0) = 0; clamp keeps autograd finite at r = 0
    return r2 * torch.log(r2.clamp_min(_LOG_EPS))


def tps_system_matrix(source):
    """The (K+3)x(K+3) matrix [[Phi, P], [P^T, 0]] for the source points."""
    K = source.shape[0]
    d2 = torch.cdist(source, source).pow(2)
    phi = _kernel(d2)
    p = torch.cat([torch.ones(K, 1, dtype=source.dtype), source], dim=1)
    top = torch.cat([phi, p], dim=1)
    bottom = torch.cat([p.transpose(0, 1), torch.zeros(3, 3, dtype=source.dtype)], dim=1)
    return torch.cat([top, bottom], dim=0)


def solve_tps(source, target):
    """Solve for TPS coefficients mapping source fiducials onto targets.

    Returns a (K+3) x 2 tensor: K kernel weights followed by the affine
    terms (constant, x, y) for each output coordinate. The last three rows
    of the system enforce the orthogonality conditions on the weights.
    """
    source = torch.as_tensor(source)
    target = torch.as_tensor(target)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 2:
        raise ValueError("source and target must both be (K, 2)")
    K = source.shape[0]
    dists = torch.cdist(source, source)
    off_diag = dists + torch.eye(K, dtype=source.dtype) * 1.0
    if bool((off_diag < COINCIDENT_TOL).any()):
        raise ValueError("degenerate fiducials")
    L = tps_system_matrix(source)
    rhs = torch.cat([target, torch.zeros(3, 2, dtype=target.dtype)], dim=0)
    try:
        coeffs = torch.linalg.solve(L, rhs)
    except RuntimeError as exc:
        raise ValueError("degenerate fiducials") from exc
    return coeffs


def output_lattice(out_h, out_w, dtype=torch.float32):
    ys = torch.linspace(-1.0, 1.0, out_h, dtype=dtype)
    xs = torch.linspace(-1.0, 1.0, out_w, dtype=dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)  # out_h x out_w x 2, (x, y) order


def tps_point_basis(points, source):
    """Rows [U(|p - s_1|) ... U(|p - s_K|), 1, x, y] for each query point."""
    d2 = torch.cdist(points, source).pow(2)
    return torch.cat([_kernel(d2), torch.ones(points.shape[0], 1, dtype=points.dtype), points], dim=1)


def tps_grid(coeffs, source, out_h, out_w):
    """Evaluate the TPS mapping on the regular output lattice.

    Returns out_h x out_w x 2 sampling locations in the input image
    (batched coefficients B x (K+3) x 2 give B x out_h x out_w x 2).
    """
    lattice = output_lattice(out_h, out_w, dtype=source.dtype).reshape(-1, 2)
    basis = tps_point_basis(lattice, source)
    grid = basis @ coeffs
    if coeffs.ndim == 3:
        return grid.reshape(coeffs.shape[0], out_h, out_w, 2)
    return grid.reshape(out_h, out_w, 2)


def bilinear_sample(image, grid):
    """Sample an image at normalized grid locations with zero padding.

    image: (B, H, W, C) or (H, W, C); grid: matching (B, h, w, 2) or
    (h, w, 2) with (x, y) coordinates in [-1, 1]. Differentiable in both
    the image and the grid.
    """
    squeeze = image.ndim == 3
    if squeeze:
        image = image.unsqueeze(0)
        grid = grid.unsqueeze(0)
    B, H, W, C = image.shape
    x = (grid[..., 0] + 1.0) * 0.5 * (W - 1)
    y = (grid[..., 1] + 1.0) * 0.5 * (H - 1)
    x0 = torch.floor(x.detach()).long()
    y0 = torch.floor(y.detach()).long()

    out = None
    flat = image.reshape(B, H * W, C)
    batch_idx = torch.arange(B, device=image.device).view(B, 1, 1)
    for dy in (0, 1):
        for dx in (0, 1):
            xi, yi = x0 + dx, y0 + dy
            valid = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            wx = 1.0 - (x - x0.to(x.dtype)) if dx == 0 else x - x0.to(x.dtype)
            wy = 1.0 - (y - y0.to(y.dtype)) if dy == 0 else y - y0.to(y.dtype)
            w = (wx * wy * valid.to(x.dtype)).unsqueeze(-1)
            idx = (yi.clamp(0, H - 1) * W + xi.clamp(0, W - 1)).reshape(B, -1, 1).expand(-1, -1, C)
            vals = torch.gather(flat, 1, idx).reshape(B, *grid.shape[1:-1], C)
            out = w * vals if out is None else out + w * vals
    return out.squeeze(0) if squeeze else out


class LocalizationNetwork(nn.Module):
    """Conv stack predicting K fiducial points in [-1, 1]^2.

    The last layer starts at zero so the initial prediction equals the
    base lattice exactly; deviations pass through a scaled tanh and a
    final clamp keeps points inside the frame.
    """

    def __init__(self, K=20, in_channels=3, channels=(16, 32, 64, 128), fc_dim=256,
                 deviation_scale=0.5):
        super().__init__()
        if K < 6 or K % 2 != 0:
            raise ValueError("K must be an even integer >= 6")
        self.K = K
        self.deviation_scale = deviation_scale
        blocks = []
        prev = in_channels
        for ch in channels:
            blocks += [nn.Conv2d(prev, ch, 3, padding=1, bias=False),
                       nn.BatchNorm2d(ch), nn.ReLU(inplace=True), nn.MaxPool2d(2)]
            prev = ch
        self.conv = nn.Sequential(*blocks, nn.AdaptiveAvgPool2d(1))
        self.fc1 = nn.Linear(prev, fc_dim)
        self.fc2 = nn.Linear(fc_dim, 2 * K)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)
        self.register_buffer("base", base_fiducials(K))

    def forward(self, images):
        """images: B x H x W x C -> fiducials B x K x 2."""
        if images.ndim != 4:
            raise ValueError("expected a batched image tensor B x H x W x C")
        h = self.conv(images.permute(0, 3, 1, 2)).flatten(1)
        raw = self.fc2(torch.relu(self.fc1(h))).view(-1, self.K, 2)
        points = self.base.unsqueeze(0) + self.deviation_scale * torch.tanh(raw)
        return torch.clamp(points, -1.0, 1.0)


class TpsWarper(nn.Module):
    """Localization + TPS solve + bilinear sampling, end to end."""

    def __init__(self, out_h, out_w, K=20, in_channels=3, channels=(16, 32, 64, 128)):
        super().__init__()
        self.out_h, self.out_w = out_h, out_w
        self.localization = LocalizationNetwork(K=K, in_channels=in_channels, channels=channels)
        # solve-related buffers kept in float64; cast per forward so the
        # identity warp stays exact when the module runs in double
        base = base_fiducials(K, dtype=torch.float64)
        self.register_buffer("base_inv", torch.linalg.inv(tps_system_matrix(base)))
        lattice = output_lattice(out_h, out_w, dtype=torch.float64).reshape(-1, 2)
        self.register_buffer("lattice_basis", tps_point_basis(lattice, base))

    def forward(self, images, return_fiducials=False):
        fiducials = self.localization(images)
        B = fiducials.shape[0]
        rhs = torch.cat([fiducials, fiducials.new_zeros(B, 3, 2)], dim=1)
        coeffs = self.base_inv.to(rhs.dtype).unsqueeze(0) @ rhs
        basis = self.lattice_basis.to(rhs.dtype)
        grid = (basis.unsqueeze(0) @ coeffs).reshape(B, self.out_h, self.out_w, 2)
        warped = bilinear_sample(images, grid)
        if return_fiducials:
            return warped, fiducials
        return warped
