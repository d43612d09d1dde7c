"""A numerical lab for restricted projections onto curved families of directions."""
