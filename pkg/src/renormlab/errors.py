"""Exception hierarchy. Every failure mode raised by the library derives from RenormLabError."""


class RenormLabError(Exception):
    """Base class for all renormlab errors."""


# polynomial kernel
class ZeroScale(RenormLabError):
    """Affine substitution with zero linear part."""


class RankDeficient(RenormLabError):
    """Least-squares normal system singular beyond tolerance."""


class NoConvergence(RenormLabError):
    """Scalar root iteration exhausted its budget."""


class DerivativeVanishes(RenormLabError):
    """Newton derivative below floor and no bracket to fall back on."""


# plane maps
class ImplicitSolveFailed(RenormLabError):
    """Generating-function equation has no reachable root; point left the representable domain."""


class SingularChange(RenormLabError):
    """Coordinate change h_t degenerates on the requested domain."""


class FitResidualTooLarge(RenormLabError):
    """Generating-function fit did not reach the requested tolerance."""


# renormalization
class NoPeriod2(RenormLabError):
    """No period-2 orbit point found in the search range."""


class DegenerateOrbit(RenormLabError):
    """Candidate period-2 point is actually fixed."""


class TwistDegenerate(RenormLabError):
    """d(x')/du of the squared map vanishes at the period-2 point."""


class WrongSign(RenormLabError):
    """Scaling signs outside the map class (lambda >= 0 or mu <= 0)."""


class MidpointSolveFailed(RenormLabError):
    """Composition midpoint equation unsolvable at a grid pair."""


class TwistLoss(RenormLabError):
    """Squared map is not a twist map on the domain."""


class NewtonDiverged(RenormLabError):
    """Fixed-point Newton failed to reduce the residual."""


class JacobianSingular(RenormLabError):
    """Finite-difference Jacobian numerically singular."""


class IllConditioned(RenormLabError):
    """Eigen-data residuals exceed threshold."""


class CascadeLost(RenormLabError):
    """Period-doubling bisection lost its orbit bracket."""


# Cantor set
class ContainmentFailed(RenormLabError):
    """Base-piece radius rejected by the containment checks."""


class TowerTooShallow(RenormLabError):
    """Requested depth exceeds the available tower."""


class NestingViolation(RenormLabError):
    """A piece escapes its parent; carries the offending word."""


class DisjointnessViolation(RenormLabError):
    """Two pieces at one depth overlap; carries the offending words."""


class PermutationViolation(RenormLabError):
    """Piece image does not land in the add-one piece; carries the word."""


class PieceMismatch(RenormLabError):
    """Sample point is not inside the named piece."""


# rigidity
class InsufficientScales(RenormLabError):
    """Holder fit needs pairs across more dyadic scales."""


class ConditionViolated(RenormLabError):
    """Rigidity exponent undefined: theta2*nu >= theta1."""


# cli
class MissingArtifact(RenormLabError):
    """Downstream subcommand lacks an upstream artifact file."""


class ConfigInvalid(RenormLabError):
    """Run configuration failed to parse or validate."""


class UnknownKind(RenormLabError):
    """Unknown plot-data kind."""
