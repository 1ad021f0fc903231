"""Portable artifact directories: save, load and share modules and pipelines.

An artifact is a directory holding ``manifest.json``, ``config.json``,
optional ``weights.bin`` and ``tokenizer/`` assets. The manifest lists every
file with its sha-256 digest; digests are verified on every load. A hub is
any HTTP file store answering ``GET/PUT {hub_url}/{name}/{relpath}``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import httpx

from .core import ModuleConfig, resolve_module_type
from .weights import WeightsFile, deserialize_weights, serialize_weights

MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.json"
WEIGHTS_FILE = "weights.bin"


class ArtifactError(Exception):
    pass


class NotFoundError(ArtifactError):
    pass


class DigestMismatchError(ArtifactError):
    pass


class ManifestError(ArtifactError):
    pass


class AuthError(ArtifactError):
    pass


class TransportError(ArtifactError):
    pass


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _check_relpath(relpath: str) -> str:
    p = Path(relpath)
    if p.is_absolute() or ".." in p.parts:
        raise ManifestError(f"illegal path in manifest: {relpath!r}")
    return p.as_posix()


@dataclass
class ArtifactManifest:
    name: str
    module_type: str
    config: ModuleConfig
    files: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.files = sorted((_check_relpath(rel), digest) for rel, digest in self.files)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "module_type": self.module_type,
            "config": self.config.to_json_dict(),
            "files": [[rel, digest] for rel, digest in self.files],
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "ArtifactManifest":
        try:
            return cls(
                name=data["name"],
                module_type=data["module_type"],
                config=ModuleConfig.from_json_dict(data["config"]),
                files=[(rel, digest) for rel, digest in data["files"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc


@dataclass
class LoadContext:
    """How sub-references are resolved while loading an artifact."""

    hub_url: str | None = None
    cache_dir: Path | None = None
    search_path: Path | None = None


def _dump_json(path: Path, payload: dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def save_pretrained(obj: Any, art_dir: str | Path, name: str | None = None) -> ArtifactManifest:
    """Write ``obj`` (module or pipeline) as an artifact directory."""
    art_dir = Path(art_dir)
    art_dir.mkdir(parents=True, exist_ok=True)
    config: ModuleConfig = obj.config
    _dump_json(art_dir / CONFIG_FILE, config.to_json_dict())
    paths = [art_dir / CONFIG_FILE]

    tensors = obj.state_tensors()
    if tensors:
        (art_dir / WEIGHTS_FILE).write_bytes(serialize_weights(WeightsFile(tensors)))
        paths.append(art_dir / WEIGHTS_FILE)

    if obj.tokenizer is not None:
        paths.extend(obj.tokenizer.save_assets(art_dir / "tokenizer"))
    paths.extend(obj.save_extra_assets(art_dir))

    files = [
        (p.relative_to(art_dir).as_posix(), sha256_hex(p.read_bytes())) for p in paths
    ]
    manifest = ArtifactManifest(
        name=name or art_dir.name, module_type=config.module_type, config=config, files=files
    )
    _dump_json(art_dir / MANIFEST_FILE, manifest.to_json_dict())
    return manifest


def read_manifest(art_dir: Path) -> ArtifactManifest:
    path = art_dir / MANIFEST_FILE
    if not path.is_file():
        raise ManifestError(f"{art_dir} has no {MANIFEST_FILE}; not a saved artifact")
    return ArtifactManifest.from_json_dict(json.loads(path.read_text(encoding="utf-8")))


def verify_artifact(art_dir: Path, manifest: ArtifactManifest) -> None:
    for rel, digest in manifest.files:
        path = art_dir / rel
        if not path.is_file():
            raise DigestMismatchError(f"listed file missing: {rel}")
        actual = sha256_hex(path.read_bytes())
        if actual != digest:
            raise DigestMismatchError(f"digest mismatch for {rel}: {actual} != {digest}")


def load_weights(art_dir: Path) -> WeightsFile | None:
    path = art_dir / WEIGHTS_FILE
    if not path.is_file():
        return None
    return deserialize_weights(path.read_bytes())


def _load_local(art_dir: Path, ctx: LoadContext) -> Any:
    manifest = read_manifest(art_dir)
    verify_artifact(art_dir, manifest)
    config = ModuleConfig.from_json_dict(
        json.loads((art_dir / CONFIG_FILE).read_text(encoding="utf-8"))
    )
    cls = resolve_module_type(config.module_type)
    return cls.load_artifact(config, art_dir, ctx)


def from_pretrained(
    ref: str | Path,
    hub_url: str | None = None,
    cache_dir: str | Path | None = None,
    search_path: str | Path | None = None,
) -> Any:
    """Load a module or pipeline from a local directory or a hub name.

    Local directories load in place. Otherwise ``ref`` is treated as a hub
    name: the manifest and every listed file are fetched over HTTP, digests
    verified, and the artifact instantiated.
    """
    cache = Path(cache_dir) if cache_dir else None
    path = Path(ref)
    if path.is_dir():
        ctx = LoadContext(hub_url=hub_url, cache_dir=cache, search_path=path.parent)
        return _load_local(path, ctx)
    if search_path is not None:
        candidate = Path(search_path) / str(ref)
        if candidate.is_dir():
            ctx = LoadContext(hub_url=hub_url, cache_dir=cache, search_path=candidate.parent)
            return _load_local(candidate, ctx)
    if hub_url is None:
        raise NotFoundError(f"{ref!r} is not a local artifact directory and no hub_url given")
    local = fetch_artifact(str(ref), hub_url, cache)
    return _load_local(local, LoadContext(hub_url=hub_url, cache_dir=cache, search_path=local.parent))


def load_ref(ref: str, ctx: LoadContext) -> Any:
    """Resolve a sub-artifact reference (used by pipeline loading)."""
    return from_pretrained(
        ref, hub_url=ctx.hub_url, cache_dir=ctx.cache_dir, search_path=ctx.search_path
    )


# -- hub client -------------------------------------------------------------


def _hub_get(client: httpx.Client, url: str) -> bytes:
    try:
        resp = client.get(url)
    except httpx.HTTPError as exc:
        raise TransportError(f"GET {url}: {exc}") from exc
    if resp.status_code == 404:
        raise NotFoundError(f"not on hub: {url}")
    if resp.status_code in (401, 403):
        raise AuthError(f"GET {url}: HTTP {resp.status_code}")
    if resp.status_code != 200:
        raise TransportError(f"GET {url}: HTTP {resp.status_code}")
    return resp.content


def fetch_artifact(name: str, hub_url: str, cache_dir: Path | None = None) -> Path:
    """Download ``{hub_url}/{name}/...`` into the cache; return the local dir."""
    if cache_dir is None:
        cache_dir = Path.home() / ".cache" / "convrec"
    target = Path(cache_dir) / name
    target.mkdir(parents=True, exist_ok=True)
    base = hub_url.rstrip("/")
    with httpx.Client(timeout=30.0) as client:
        manifest_bytes = _hub_get(client, f"{base}/{name}/{MANIFEST_FILE}")
        manifest = ArtifactManifest.from_json_dict(json.loads(manifest_bytes))
        (target / MANIFEST_FILE).write_bytes(manifest_bytes)
        for rel, _digest in manifest.files:
            data = _hub_get(client, f"{base}/{name}/{rel}")
            dest = target / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(data)
    return target


def push_to_hub(art_dir: str | Path, hub_url: str, token: str) -> str:
    """Upload a saved artifact; returns the hub ref (the artifact name)."""
    art_dir = Path(art_dir)
    manifest = read_manifest(art_dir)
    verify_artifact(art_dir, manifest)
    base = hub_url.rstrip("/")
    headers = {"Authorization": f"Bearer {token}"}
    uploads = [(MANIFEST_FILE, (art_dir / MANIFEST_FILE).read_bytes())]
    uploads += [(rel, (art_dir / rel).read_bytes()) for rel, _ in manifest.files]
    with httpx.Client(timeout=30.0, headers=headers) as client:
        for rel, data in uploads:
            url = f"{base}/{manifest.name}/{rel}"
            try:
                resp = client.put(url, content=data)
            except httpx.HTTPError as exc:
                raise TransportError(f"PUT {url}: {exc}") from exc
            if resp.status_code in (401, 403):
                raise AuthError(f"PUT {url}: HTTP {resp.status_code}")
            if resp.status_code not in (200, 201, 204):
                raise TransportError(f"PUT {url}: HTTP {resp.status_code}")
    return manifest.name
