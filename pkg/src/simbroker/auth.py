"""Bearer-token authentication and tenancy.

Tokens are opaque random strings (>= 128 bits when issued here) bound to one
principal, with optional expiry. Comparison is constant-time per stored token
and the scan never exits early. An optional external hook can verify an
upstream identity assertion (a stand-in for a course-portal handshake) when a
bearer token is unknown.
"""

from __future__ import annotations

import hmac
import secrets
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Callable, Optional

from .sessions import ResourceLimits

__all__ = [
    "Role",
    "Principal",
    "TenantConfig",
    "Unauthorized",
    "Forbidden",
    "TokenStore",
    "TenantRegistry",
]


class Role(Enum):
    STUDENT = "student"
    INSTRUCTOR = "instructor"
    ADMIN = "admin"


class Unauthorized(Exception):
    pass


class Forbidden(Exception):
    pass


@dataclass(frozen=True)
class Principal:
    subject: str
    tenant: str
    role: Role


@dataclass(frozen=True)
class TenantConfig:
    id: str
    domain: str
    quota: ResourceLimits
    max_sessions_per_user: int = 1


@dataclass
class _TokenRecord:
    token: str
    principal: Principal
    expires_at: Optional[datetime] = None


class TokenStore:
    def __init__(
        self,
        clock: Callable[[], datetime] = datetime.now,
        external_hook: Optional[Callable[[str], Optional[Principal]]] = None,
    ):
        self.clock = clock
        self.external_hook = external_hook
        self._records: list[_TokenRecord] = []

    def issue(self, principal: Principal, expires_at: Optional[datetime] = None) -> str:
        token = secrets.token_urlsafe(32)  # 256 bits
        self.add(token, principal, expires_at)
        return token

    def add(self, token: str, principal: Principal, expires_at: Optional[datetime] = None) -> None:
        """Register an admin-seeded static token."""
        if not token:
            raise ValueError("token must be non-empty")
        self._records.append(_TokenRecord(token, principal, expires_at))

    def authenticate(self, bearer: str) -> Principal:
        if not bearer:
            raise Unauthorized("missing token")
        now = self.clock()
        matched: Optional[Principal] = None
        for record in self._records:  # full scan, constant-time per compare
            if hmac.compare_digest(record.token, bearer):
                if record.expires_at is not None and record.expires_at <= now:
                    continue  # expired tokens authenticate nothing
                matched = record.principal
        if matched is not None:
            return matched
        if self.external_hook is not None:
            principal = self.external_hook(bearer)
            if principal is not None:
                return principal
        raise Unauthorized("unknown or expired token")


class TenantRegistry:
    def __init__(self, tenants: list[TenantConfig]):
        domains = [t.domain for t in tenants]
        if len(domains) != len(set(domains)):
            raise ValueError("tenant domains must be disjoint")
        self._by_id = {t.id: t for t in tenants}
        if len(self._by_id) != len(tenants):
            raise ValueError("tenant ids must be unique")

    def get(self, tenant_id: str) -> TenantConfig:
        try:
            return self._by_id[tenant_id]
        except KeyError:
            raise Forbidden(f"unknown tenant {tenant_id!r}") from None

    def all(self) -> list[TenantConfig]:
        return sorted(self._by_id.values(), key=lambda t: t.id)
