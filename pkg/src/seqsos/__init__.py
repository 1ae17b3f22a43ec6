"""Sequential convex programming for nonlinear sum-of-squares programs.

Modules: ``poly`` (polynomials), ``gram`` (SOS via Gram matrices), ``sdp``
(conic programs and the bundled interior-point solver), ``model`` (nonlinear
SOS programs and their derivatives), ``seq`` (the sequential method),
``roa`` (region-of-attraction programs), ``baseline`` (V-s coordinate
descent), ``problem_file`` and ``cli``.
"""

__version__ = "0.1.0"
