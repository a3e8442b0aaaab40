"""Common Platform Enumeration (CPE 2.2 URI) parsing and interpretation.

CPE URIs of the form ``cpe:/part:vendor:product[:version[:...]]`` are the
currency of OS and service identity throughout the toolkit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class MalformedCpe(ValueError):
    """A CPE URI string that cannot be parsed."""


class Part(Enum):
    OS = "o"
    APPLICATION = "a"
    HARDWARE = "h"


_PART_BY_LETTER = {p.value: p for p in Part}

# Product names too broad to identify a concrete OS line on their own.
GENERIC_PRODUCTS = frozenset({"linux_kernel", "linux", "windows", "unix"})

_KERNEL_LINE = re.compile(r"\d+\.\d+")

_LINUX_VENDORS = frozenset(
    {
        "linux",
        "canonical",
        "debian",
        "redhat",
        "centos",
        "fedoraproject",
        "novell",
        "suse",
        "opensuse",
        "offensive-security",
        "kali",
        "gentoo",
        "slackware",
        "archlinux",
    }
)

_FAMILY_OVERRIDES = {
    "linux_kernel": "Linux",
    "linux": "Linux",
    "opensuse": "OpenSUSE",
    "suse_linux": "OpenSUSE",
}


@dataclass(frozen=True, slots=True)
class CpeUri:
    """Structured platform identifier.

    ``version`` distinguishes "absent" (None) from "present but empty" (""),
    so that formatting reproduces the original URI byte for byte.
    """

    part: Part
    vendor: str
    product: str
    version: str | None = None
    tail: tuple[str, ...] = ()

    def __str__(self) -> str:
        segments = [self.part.value, self.vendor, self.product]
        if self.version is not None:
            segments.append(self.version)
        segments.extend(self.tail)
        return "cpe:/" + ":".join(segments)


def parse_cpe(text: str) -> CpeUri:
    """Parse a ``cpe:/...`` URI string into a CpeUri."""
    if not text.startswith("cpe:/"):
        raise MalformedCpe(f"missing 'cpe:/' prefix: {text!r}")
    segments = text[len("cpe:/") :].split(":")
    if len(segments) < 3:
        raise MalformedCpe(f"expected part:vendor:product after prefix: {text!r}")
    part = _PART_BY_LETTER.get(segments[0])
    if part is None:
        raise MalformedCpe(f"unknown part letter {segments[0]!r}: {text!r}")
    vendor, product = segments[1], segments[2]
    if not vendor or not product:
        raise MalformedCpe(f"empty vendor or product: {text!r}")
    version = segments[3] if len(segments) > 3 else None
    return CpeUri(part, vendor, product, version, tuple(segments[4:]))


def effective_version(cpe: CpeUri) -> str | None:
    """The token that pins a release, if any.

    The version field wins; otherwise the first non-empty trailing token
    does (e.g. the ``sp1`` in ``cpe:/o:microsoft:windows_7::sp1``).
    """
    if cpe.version:
        return cpe.version
    return next((t for t in cpe.tail if t), None)


def is_generic_cpe(cpe: CpeUri) -> bool:
    """True iff the CPE cannot pin an OS generation.

    A CPE is generic when it carries no effective version, or when it names
    a bare kernel line (``linux_kernel`` with a two-component version such
    as 2.6), which says nothing about the distribution release.
    """
    version = effective_version(cpe)
    if version is None:
        return True
    if cpe.product in GENERIC_PRODUCTS:
        return cpe.product == "linux_kernel" and _KERNEL_LINE.fullmatch(version) is not None
    return False


def is_windows_xp(cpe: CpeUri) -> bool:
    """True when the CPE identifies Windows XP in any spelling."""
    if cpe.product == "windows_xp":
        return True
    tokens = [cpe.version or ""] + list(cpe.tail)
    return any(t.lower() == "xp" for t in tokens)


@dataclass(frozen=True, slots=True)
class OsIdentity:
    """Human-facing (os, vendor, family, generation) tuple behind an OS CPE."""

    os: str
    vendor: str
    family: str
    generation: str | None


def _windows_generation(version: str | None) -> str | None:
    if version is None:
        return None
    match = re.fullmatch(r"(sp|r)(\d+)", version, re.IGNORECASE)
    if match:
        return match.group(1).upper() + match.group(2)
    return version


def os_identity(cpe: CpeUri) -> OsIdentity:
    """Map an OS CPE to its display identity.

    ``cpe:/o:canonical:ubuntu_linux:16.04`` -> (Linux, Linux, Ubuntu, 16.04);
    ``cpe:/o:microsoft:windows_7::sp1`` -> (Windows, Microsoft, 7, SP1).
    """
    version = effective_version(cpe)
    if cpe.vendor == "microsoft":
        family = cpe.product.removeprefix("windows").strip("_").replace("_", " ").title()
        return OsIdentity("Windows", "Microsoft", family or "Windows", _windows_generation(version))
    if cpe.vendor == "apple" and "os_x" in cpe.product:
        return OsIdentity("Mac OS X", "Apple", "OS X", version)
    if (
        cpe.vendor in _LINUX_VENDORS
        or cpe.product.endswith("_linux")
        or cpe.product in _FAMILY_OVERRIDES
    ):
        family = _FAMILY_OVERRIDES.get(cpe.product)
        if family is None:
            family = cpe.product.removesuffix("_linux").replace("_", " ").title()
        return OsIdentity("Linux", "Linux", family, version)
    name = cpe.product.replace("_", " ").title()
    return OsIdentity(name, cpe.vendor.title(), name, version)
