"""Generalized robustness of the OCB process with cvxpy, used once to freeze a
test fixture. Factor order: A_I, A_O, B_I, B_O (qubits)."""
import numpy as np
import cvxpy as cp

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


def kron(*ms):
    out = np.eye(1)
    for m in ms:
        out = np.kron(out, m)
    return out


def tr_replace(w, k):
    """Trace factor k and replace with 1/2; works on cvxpy expressions too."""
    dims = [2, 2, 2, 2]
    red = cp.partial_trace(w, dims, axis=k) if isinstance(w, cp.Expression) else None
    if red is None:
        t = w.reshape([2] * 8)
        t = np.trace(t, axis1=k, axis2=k + 4)
        red = t.reshape(8, 8)
    # Reinsert the identity at position k.
    left, right = 2 ** k, 2 ** (3 - k)
    perm = _insert_perm(k)
    full = cp.kron(red, I2 / 2) if isinstance(red, cp.Expression) else np.kron(red, I2 / 2)
    return perm @ full @ perm.T


def _insert_perm(k):
    # Maps factor order (others..., k) to (0,1,2,3).
    order = [i for i in range(4) if i != k] + [k]
    p = np.zeros((16, 16))
    for idx in range(16):
        bits = [(idx >> (3 - j)) & 1 for j in range(4)]
        src = 0
        for f in order:
            src = src * 2 + bits[f]
        p[idx, src] = 1
    return p


def T(w, ks):
    for k in ks:
        w = tr_replace(w, k)
    return w


AI, AO, BI, BO = 0, 1, 2, 3
W = (np.eye(16) + (kron(I2, Z, Z, I2) + kron(Z, I2, X, Z)) / np.sqrt(2)) / 4

W1 = cp.Variable((16, 16), hermitian=True)
W2 = cp.Variable((16, 16), hermitian=True)
Om = cp.Variable((16, 16), hermitian=True)
cons = [W1 >> 0, W2 >> 0, Om >> 0, W + Om == W1 + W2]
# A before B.
cons += [W1 == T(W1, [BO]), T(W1, [BI, BO]) == T(W1, [AO, BI, BO])]
# B before A.
cons += [W2 == T(W2, [AO]), T(W2, [AI, AO]) == T(W2, [AI, AO, BO])]
# Omega in the valid subspace.
lv = (T(Om, [BO]) + T(Om, [AO]) - T(Om, [AO, BO]) - T(Om, [BI, BO]) + T(Om, [AO, BI, BO])
      - T(Om, [AI, AO]) + T(Om, [AI, AO, BO]))
cons += [Om == lv]
prob = cp.Problem(cp.Minimize(cp.real(cp.trace(Om)) / 4), cons)
prob.solve(solver=cp.SCS, eps=1e-10, max_iters=200000)
print(prob.status, repr(prob.value), 3 - 2 * np.sqrt(2))
