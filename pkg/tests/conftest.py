from hypothesis import settings

# first calls compile numba kernels, so wall-clock deadlines are meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")
